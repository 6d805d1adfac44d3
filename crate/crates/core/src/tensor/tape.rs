use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use super::{BackwardFn, Result, Tensor, TensorError};

struct Node {
    inputs: Vec<Tensor>,
    output: Tensor,
    backward: BackwardFn,
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
    static NO_GRAD_DEPTH: Cell<usize> = const { Cell::new(0) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

pub(super) fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub(super) fn record(inputs: Vec<Tensor>, output: Tensor, backward: BackwardFn) {
    TAPE.with(|t| {
        t.borrow_mut().push(Node {
            inputs,
            output,
            backward,
        })
    });
}

/// Whether operations are currently being recorded on this thread's tape.
pub fn is_recording() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

/// Number of nodes on this thread's tape.
pub fn tape_len() -> usize {
    TAPE.with(|t| t.borrow().len())
}

/// Drop every recorded node. Leaf gradients are kept.
pub fn clear_tape() {
    // Swap out first so node drops cannot observe a borrowed tape.
    let nodes = TAPE.with(|t| std::mem::take(&mut *t.borrow_mut()));
    drop(nodes);
}

struct NoGradGuard;

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
    }
}

/// Run `body` with recording suspended. Nests.
pub fn no_grad<R>(body: impl FnOnce() -> R) -> R {
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let _guard = NoGradGuard;
    body()
}

/// Accumulate `d loss / d leaf` into every grad-enabled leaf reachable from
/// `loss`. Gradients add to whatever the leaves already hold.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    let value = loss.item();
    if !value.is_finite() {
        return Err(TensorError::NonFiniteLoss(value));
    }
    if !loss.requires_grad() {
        return Ok(());
    }
    if loss.is_leaf() {
        loss.accumulate_grad(&[1.0]);
        return Ok(());
    }

    let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
    pending.insert(loss.id(), vec![1.0]);
    TAPE.with(|t| {
        let tape = t.borrow();
        for node in tape.iter().rev() {
            let Some(g) = pending.remove(&node.output.id()) else {
                continue;
            };
            let grads = (node.backward)(&g);
            debug_assert_eq!(grads.len(), node.inputs.len());
            for (input, grad) in node.inputs.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !input.requires_grad() {
                    continue;
                }
                if input.is_leaf() {
                    input.accumulate_grad(&grad);
                } else {
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.id(), grad);
                        }
                    }
                }
            }
            if pending.is_empty() {
                break;
            }
        }
    });
    Ok(())
}
