use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub type NodeId = usize;

/// Backward rule of one recorded operation: given the output gradient,
/// accumulate contributions into the input nodes' gradient buffers.
type BackwardFn<E> = Box<dyn Fn(&[E], &mut Grads<E>)>;

struct Node<E: Element> {
    len: usize,
    backward: Option<BackwardFn<E>>,
}

/// Wengert tape: records operations in topological order during the forward
/// pass and replays them in reverse for gradient computation.
///
/// Single-threaded by contract; one training step owns one tape.
pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf (parameter or input requiring gradient) on the tape.
    /// Returns a tensor sharing the same storage but carrying a node id.
    pub fn leaf(&mut self, t: &Tensor<E>) -> Tensor<E> {
        let id = self.push_leaf(t.len());
        Tensor {
            shape: t.shape().to_vec(),
            data: t.data_rc(),
            node: Some(id),
        }
    }

    pub(crate) fn push_leaf(&mut self, len: usize) -> NodeId {
        self.nodes.push(Node {
            len,
            backward: None,
        });
        self.nodes.len() - 1
    }

    pub(crate) fn push_op(&mut self, len: usize, backward: BackwardFn<E>) -> NodeId {
        self.nodes.push(Node {
            len,
            backward: Some(backward),
        });
        self.nodes.len() - 1
    }

    /// Reverse sweep from a scalar loss. Fills gradient buffers for every
    /// node reachable from the loss; each node is visited exactly once.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<Grads<E>> {
        let id = loss.node().ok_or_else(|| {
            Error::Contract("backward requires a tensor recorded on the tape".into())
        })?;
        if !loss.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut grads = Grads {
            slots: (0..self.nodes.len()).map(|_| None).collect(),
        };
        grads.slots[id] = Some(vec![E::one()]);
        for i in (0..=id).rev() {
            let Some(g) = grads.slots[i].take() else {
                continue;
            };
            debug_assert_eq!(g.len(), self.nodes[i].len, "gradient/value length mismatch");
            if let Some(back) = &self.nodes[i].backward {
                back(&g, &mut grads);
            }
            grads.slots[i] = Some(g);
        }
        Ok(grads)
    }
}

/// Gradient buffers indexed by tape node id.
pub struct Grads<E: Element> {
    slots: Vec<Option<Vec<E>>>,
}

impl<E: Element> Grads<E> {
    /// Gradient of the loss w.r.t. the given node, if any flowed there.
    pub fn get(&self, id: NodeId) -> Option<&[E]> {
        self.slots.get(id).and_then(|s| s.as_deref())
    }

    pub fn of(&self, t: &Tensor<E>) -> Option<&[E]> {
        t.node().and_then(|id| self.get(id))
    }

    /// Accumulate a contribution into a node's gradient buffer.
    pub(crate) fn accumulate(&mut self, id: NodeId, len: usize, contrib: impl FnOnce(&mut [E])) {
        let slot = &mut self.slots[id];
        let buf = slot.get_or_insert_with(|| vec![E::zero(); len]);
        contrib(buf);
    }
}
