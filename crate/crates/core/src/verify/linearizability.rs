//! Exhaustive linearizability search for small concurrent histories.
//!
//! A history is linearizable if some total order of its operations respects
//! real-time precedence (an operation that responded before another was
//! invoked comes first) and replays against the sequential model with the
//! same return values. The search is a depth-first walk over the operations
//! that may come next, memoised on (set of operations done, model state).

use std::collections::HashSet;
use std::hash::Hash;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::rma::RmaOp;

/// Sequential model an implementation is checked against.
pub trait SequentialSpec {
    type State: Clone + Eq + Hash;
    type Op;
    type Ret: PartialEq;

    fn init(&self) -> Self::State;
    fn step(&self, state: &Self::State, op: &Self::Op) -> (Self::State, Self::Ret);
}

/// One completed operation with its invocation and response instants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operation<O, R> {
    pub context: usize,
    pub invoke: u64,
    pub response: u64,
    pub op: O,
    pub ret: R,
}

/// Largest history the search accepts.
pub const MAX_OPS: usize = 64;

/// Returns a witness order (indices into `history`) or `None` if the history
/// is not linearizable.
///
/// # Panics
///
/// If the history holds more than [`MAX_OPS`] operations.
pub fn linearizability_check<S: SequentialSpec>(
    spec: &S,
    history: &[Operation<S::Op, S::Ret>],
) -> Option<Vec<usize>> {
    assert!(history.len() <= MAX_OPS, "history too long for exhaustive search");
    let n = history.len();
    let full: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut seen: HashSet<(u64, S::State)> = HashSet::new();
    let mut order = Vec::with_capacity(n);
    if search(spec, history, full, 0, spec.init(), &mut seen, &mut order) {
        Some(order)
    } else {
        None
    }
}

fn search<S: SequentialSpec>(
    spec: &S,
    history: &[Operation<S::Op, S::Ret>],
    full: u64,
    done: u64,
    state: S::State,
    seen: &mut HashSet<(u64, S::State)>,
    order: &mut Vec<usize>,
) -> bool {
    if done == full {
        return true;
    }
    if !seen.insert((done, state.clone())) {
        return false;
    }
    // The earliest response among pending operations bounds which ones may go next.
    let horizon = (0..history.len())
        .filter(|&i| done & (1 << i) == 0)
        .map(|i| history[i].response)
        .min()
        .unwrap_or(u64::MAX);
    for i in 0..history.len() {
        if done & (1 << i) != 0 || history[i].invoke > horizon {
            continue;
        }
        let (next, ret) = spec.step(&state, &history[i].op);
        if ret != history[i].ret {
            continue;
        }
        order.push(i);
        if search(spec, history, full, done | (1 << i), next, seen, order) {
            return true;
        }
        order.pop();
    }
    false
}

/// A single window cell under the RMA calls.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellSpec {
    pub initial: i64,
}

impl SequentialSpec for CellSpec {
    type State = i64;
    type Op = RmaOp;
    type Ret = Option<i64>;

    fn init(&self) -> i64 {
        self.initial
    }

    fn step(&self, state: &i64, op: &RmaOp) -> (i64, Option<i64>) {
        op.step(*state)
    }
}

/// Logical clock used to stamp invocations and responses of concurrent
/// operations.
#[derive(Debug, Default)]
pub struct HistoryClock(AtomicU64);

impl HistoryClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rma::AccOp;

    fn op(context: usize, invoke: u64, response: u64, op: RmaOp, ret: Option<i64>) -> Operation<RmaOp, Option<i64>> {
        Operation {
            context,
            invoke,
            response,
            op,
            ret,
        }
    }

    #[test]
    fn single_context_history() {
        let h = vec![
            op(1, 0, 1, RmaOp::Put(5), None),
            op(1, 2, 3, RmaOp::Get, Some(5)),
            op(1, 4, 5, RmaOp::Fao(1, AccOp::Sum), Some(5)),
            op(1, 6, 7, RmaOp::Get, Some(6)),
        ];
        assert_eq!(linearizability_check(&CellSpec::default(), &h), Some(vec![0, 1, 2, 3]));
    }

    #[test]
    fn duplicate_fao_results_rejected() {
        let h = vec![
            op(1, 0, 5, RmaOp::Fao(1, AccOp::Sum), Some(0)),
            op(2, 0, 5, RmaOp::Fao(1, AccOp::Sum), Some(0)),
        ];
        assert_eq!(linearizability_check(&CellSpec::default(), &h), None);
    }

    #[test]
    fn concurrent_puts_either_order() {
        for last in [3, 7] {
            let h = vec![
                op(1, 0, 4, RmaOp::Put(3), None),
                op(2, 1, 5, RmaOp::Put(7), None),
                op(3, 6, 7, RmaOp::Get, Some(last)),
            ];
            assert!(linearizability_check(&CellSpec::default(), &h).is_some());
        }
        let h = vec![
            op(1, 0, 4, RmaOp::Put(3), None),
            op(2, 1, 5, RmaOp::Put(7), None),
            op(3, 6, 7, RmaOp::Get, Some(0)),
        ];
        assert!(linearizability_check(&CellSpec::default(), &h).is_none());
    }

    #[test]
    fn real_time_order_is_respected() {
        // The put finished before the get started, so the get cannot see 0.
        let h = vec![op(1, 0, 1, RmaOp::Put(9), None), op(2, 2, 3, RmaOp::Get, Some(0))];
        assert!(linearizability_check(&CellSpec::default(), &h).is_none());
        // Overlapping, it can.
        let h = vec![op(1, 0, 3, RmaOp::Put(9), None), op(2, 1, 2, RmaOp::Get, Some(0))];
        assert!(linearizability_check(&CellSpec::default(), &h).is_some());
    }

    #[test]
    fn get_concurrent_with_increment() {
        for seen in [4, 5] {
            let h = vec![
                op(1, 0, 3, RmaOp::Fao(1, AccOp::Sum), Some(4)),
                op(2, 1, 2, RmaOp::Get, Some(seen)),
            ];
            assert!(linearizability_check(&CellSpec { initial: 4 }, &h).is_some());
        }
        let h = vec![
            op(1, 0, 3, RmaOp::Fao(1, AccOp::Sum), Some(4)),
            op(2, 1, 2, RmaOp::Get, Some(6)),
        ];
        assert!(linearizability_check(&CellSpec { initial: 4 }, &h).is_none());
    }

    /// Brute force over all permutations, independent of the memoised search.
    fn brute_force(h: &[Operation<RmaOp, Option<i64>>]) -> bool {
        fn rec(h: &[Operation<RmaOp, Option<i64>>], used: &mut Vec<bool>, order: &mut Vec<usize>) -> bool {
            if order.len() == h.len() {
                for a in 0..order.len() {
                    for b in a + 1..order.len() {
                        if h[order[b]].response < h[order[a]].invoke {
                            return false;
                        }
                    }
                }
                let mut v = 0;
                for &i in order.iter() {
                    let (n, r) = h[i].op.step(v);
                    if r != h[i].ret {
                        return false;
                    }
                    v = n;
                }
                return true;
            }
            for i in 0..h.len() {
                if !used[i] {
                    used[i] = true;
                    order.push(i);
                    if rec(h, used, order) {
                        return true;
                    }
                    order.pop();
                    used[i] = false;
                }
            }
            false
        }
        rec(h, &mut vec![false; h.len()], &mut Vec::new())
    }

    proptest::proptest! {
        #[test]
        fn agrees_with_brute_force(
            raw in proptest::collection::vec((0u64..8, 0u64..4, 0u8..5, -2i64..3, proptest::option::of(-2i64..4)), 1..6)
        ) {
            let h: Vec<_> = raw
                .iter()
                .enumerate()
                .map(|(i, &(inv, len, kind, arg, ret))| {
                    let o = match kind {
                        0 => RmaOp::Put(arg),
                        1 => RmaOp::Get,
                        2 => RmaOp::Accumulate(arg, AccOp::Sum),
                        3 => RmaOp::Fao(arg, AccOp::Sum),
                        _ => RmaOp::Cas { src: arg, cmp: 0 },
                    };
                    let ret = if matches!(o, RmaOp::Put(_) | RmaOp::Accumulate(..)) { None } else { Some(ret.unwrap_or(0)) };
                    op(i, inv, inv + len, o, ret)
                })
                .collect();
            proptest::prop_assert_eq!(linearizability_check(&CellSpec::default(), &h).is_some(), brute_force(&h));
        }
    }
}
